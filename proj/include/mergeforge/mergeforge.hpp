#pragma once

#include "mergeforge/checkpoint_io.hpp"
#include "mergeforge/config.hpp"
#include "mergeforge/datamix.hpp"
#include "mergeforge/diagnostics.hpp"
#include "mergeforge/error.hpp"
#include "mergeforge/merge.hpp"
#include "mergeforge/numeric.hpp"
#include "mergeforge/parallel.hpp"
#include "mergeforge/sweep.hpp"
#include "mergeforge/taskvector.hpp"
#include "mergeforge/tensor.hpp"
#include "mergeforge/textmetrics.hpp"

#define MERGEFORGE_VERSION "0.1.0"
