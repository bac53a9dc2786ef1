#pragma once

// Umbrella header: the whole library.

#include "kvq/bitpack.hpp"
#include "kvq/calibrate.hpp"
#include "kvq/errors.hpp"
#include "kvq/kernels.hpp"
#include "kvq/kvcache.hpp"
#include "kvq/matrix.hpp"
#include "kvq/quantize.hpp"
#include "kvq/reference.hpp"
#include "kvq/selftest.hpp"
#include "kvq/tensor_io.hpp"
#include "kvq/workload.hpp"
