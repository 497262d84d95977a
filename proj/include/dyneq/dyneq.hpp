#pragma once

#include "dyneq/errors.hpp"
#include "dyneq/exit_time_curve.hpp"
#include "dyneq/flow_measures.hpp"
#include "dyneq/arc_models.hpp"
#include "dyneq/network_loading.hpp"
#include "dyneq/equilibrium.hpp"
#include "dyneq/reference_oracle.hpp"
#include "dyneq/scenario_io.hpp"
#include "dyneq/cli.hpp"
