#pragma once

#include "hpnp/config.hpp"
#include "hpnp/denoise.hpp"
#include "hpnp/error.hpp"
#include "hpnp/experiment.hpp"
#include "hpnp/image.hpp"
#include "hpnp/lowrank.hpp"
#include "hpnp/parallel.hpp"
#include "hpnp/patches.hpp"
#include "hpnp/rng.hpp"
#include "hpnp/sensing.hpp"
#include "hpnp/solver.hpp"
