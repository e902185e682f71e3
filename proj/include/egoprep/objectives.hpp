#pragma once

#include "egoprep/objective.hpp"
#include "egoprep/objectives/convex.hpp"
#include "egoprep/objectives/matfac.hpp"
#include "egoprep/objectives/networks.hpp"
