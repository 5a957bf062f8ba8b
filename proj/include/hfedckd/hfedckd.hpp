// SPDX-License-Identifier: Apache-2.0
#pragma once

// Umbrella header for the full federated distillation laboratory.

#include "hfedckd/checkpoint.hpp"
#include "hfedckd/config.hpp"
#include "hfedckd/contrastive.hpp"
#include "hfedckd/data.hpp"
#include "hfedckd/generator.hpp"
#include "hfedckd/ipwd.hpp"
#include "hfedckd/metrics.hpp"
#include "hfedckd/model.hpp"
#include "hfedckd/nn.hpp"
#include "hfedckd/protocol.hpp"
#include "hfedckd/rng.hpp"
#include "hfedckd/tensor.hpp"
