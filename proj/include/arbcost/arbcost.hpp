#pragma once

#include "arbcost/errors.hpp"
#include "arbcost/model.hpp"
#include "arbcost/lattice.hpp"
#include "arbcost/blackscholes.hpp"
#include "arbcost/chain.hpp"
#include "arbcost/calibration.hpp"
#include "arbcost/marketdata.hpp"
#include "arbcost/random.hpp"
