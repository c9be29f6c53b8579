#pragma once

#include "ngflow/sparse.hpp"
#include "ngflow/grid.hpp"
#include "ngflow/flow.hpp"
#include "ngflow/accel.hpp"
#include "ngflow/experiments.hpp"
#include "ngflow/plot.hpp"
