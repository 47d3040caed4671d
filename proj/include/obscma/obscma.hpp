#pragma once

#include "obscma/analysis.hpp"
#include "obscma/channel.hpp"
#include "obscma/codebook.hpp"
#include "obscma/common.hpp"
#include "obscma/detectors.hpp"
#include "obscma/grid.hpp"
#include "obscma/otfs_modem.hpp"
#include "obscma/parallel.hpp"
#include "obscma/simulator.hpp"
