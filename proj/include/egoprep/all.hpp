#pragma once

#include "egoprep/datasets.hpp"
#include "egoprep/diagnostics.hpp"
#include "egoprep/egop.hpp"
#include "egoprep/error.hpp"
#include "egoprep/harness.hpp"
#include "egoprep/linalg.hpp"
#include "egoprep/objectives.hpp"
#include "egoprep/optimizers.hpp"
#include "egoprep/rng.hpp"
#include "egoprep/sampling.hpp"
#include "egoprep/version.hpp"
