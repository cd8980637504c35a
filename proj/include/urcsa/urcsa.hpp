#pragma once

#include "urcsa/error.hpp"
#include "urcsa/tensor.hpp"
#include "urcsa/ops.hpp"
#include "urcsa/conv.hpp"
#include "urcsa/gradcheck.hpp"
#include "urcsa/param.hpp"
#include "urcsa/rcsa.hpp"
#include "urcsa/unet.hpp"
#include "urcsa/network.hpp"
#include "urcsa/checkpoint.hpp"
#include "urcsa/losses.hpp"
#include "urcsa/metrics.hpp"
#include "urcsa/image.hpp"
#include "urcsa/png_io.hpp"
#include "urcsa/enhance.hpp"
#include "urcsa/trainer.hpp"
#include "urcsa/dataset.hpp"
#include "urcsa/config.hpp"
#include "urcsa/report.hpp"
