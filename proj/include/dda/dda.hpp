#pragma once

#include "dda/errors.hpp"
#include "dda/linalg.hpp"
#include "dda/schedule.hpp"
#include "dda/polyhedron.hpp"
#include "dda/network.hpp"
#include "dda/problem.hpp"
#include "dda/algorithms.hpp"
#include "dda/statistics.hpp"
#include "dda/analysis.hpp"
#include "dda/config.hpp"
#include "dda/io.hpp"
