#pragma once

#include "dsdf/error.hpp"
#include "dsdf/tensor.hpp"
#include "dsdf/ops.hpp"
#include "dsdf/params.hpp"
#include "dsdf/checkpoint.hpp"
#include "dsdf/image.hpp"
#include "dsdf/frequency.hpp"
#include "dsdf/layers.hpp"
#include "dsdf/spatial_encoder.hpp"
#include "dsdf/frequency_encoder.hpp"
#include "dsdf/blood.hpp"
#include "dsdf/fusion.hpp"
#include "dsdf/model.hpp"
#include "dsdf/metrics.hpp"
#include "dsdf/config.hpp"
#include "dsdf/corpus.hpp"
#include "dsdf/optim.hpp"
#include "dsdf/train.hpp"
