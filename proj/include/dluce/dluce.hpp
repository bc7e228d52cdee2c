#pragma once

#include "dluce/core.hpp"
#include "dluce/random.hpp"
#include "dluce/smc.hpp"
#include "dluce/estimate.hpp"
#include "dluce/bandit.hpp"
#include "dluce/sim.hpp"
