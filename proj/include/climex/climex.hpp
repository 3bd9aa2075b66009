#pragma once

#include "climex/adversary.hpp"
#include "climex/config.hpp"
#include "climex/errors.hpp"
#include "climex/estimators.hpp"
#include "climex/experiment.hpp"
#include "climex/protocol_sim.hpp"
#include "climex/secrecy_bits.hpp"
#include "climex/signal_model.hpp"
