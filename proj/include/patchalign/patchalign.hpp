#pragma once

#include "patchalign/artifacts.hpp"
#include "patchalign/config.hpp"
#include "patchalign/losses.hpp"
#include "patchalign/metrics.hpp"
#include "patchalign/nets.hpp"
#include "patchalign/ops.hpp"
#include "patchalign/optim.hpp"
#include "patchalign/patchmodes.hpp"
#include "patchalign/pten.hpp"
#include "patchalign/rng.hpp"
#include "patchalign/synthdata.hpp"
#include "patchalign/tensor.hpp"
#include "patchalign/trainer.hpp"
