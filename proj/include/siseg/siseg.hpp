#pragma once

// Umbrella header for the whole library.

#include "siseg/error.hpp"
#include "siseg/harness.hpp"
#include "siseg/metrics.hpp"
#include "siseg/nn_ops.hpp"
#include "siseg/optim.hpp"
#include "siseg/preprocess.hpp"
#include "siseg/rng.hpp"
#include "siseg/si_codec.hpp"
#include "siseg/synthgen.hpp"
#include "siseg/tensor.hpp"
#include "siseg/unet.hpp"
#include "siseg/volume.hpp"
#include "siseg/volume_store.hpp"
