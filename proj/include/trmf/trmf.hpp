#pragma once

#include "trmf/data_model.hpp"
#include "trmf/evaluation.hpp"
#include "trmf/forecasting.hpp"
#include "trmf/hierarchy.hpp"
#include "trmf/io.hpp"
#include "trmf/solver.hpp"
