#pragma once

#include "sipldl/augment.hpp"
#include "sipldl/autodiff.hpp"
#include "sipldl/bounds.hpp"
#include "sipldl/data.hpp"
#include "sipldl/errors.hpp"
#include "sipldl/graph.hpp"
#include "sipldl/harness.hpp"
#include "sipldl/losses.hpp"
#include "sipldl/metrics.hpp"
#include "sipldl/model.hpp"
#include "sipldl/optim.hpp"
#include "sipldl/report.hpp"
#include "sipldl/rng.hpp"
#include "sipldl/serialize.hpp"
#include "sipldl/tensor.hpp"
#include "sipldl/timeseries.hpp"
