#pragma once

#include "scsp/errors.hpp"
#include "scsp/rng.hpp"
#include "scsp/tensor.hpp"
#include "scsp/linalg.hpp"
#include "scsp/spectral.hpp"
#include "scsp/nn.hpp"
#include "scsp/data.hpp"
#include "scsp/train.hpp"
#include "scsp/pruning.hpp"
#include "scsp/metrics.hpp"
#include "scsp/report.hpp"
#include "scsp/checkpoint.hpp"
#include "scsp/experiment.hpp"
