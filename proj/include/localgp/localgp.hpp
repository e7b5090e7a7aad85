#pragma once

// Umbrella include for the whole header-only library.

#include "localgp/bench.hpp"
#include "localgp/config.hpp"
#include "localgp/csv.hpp"
#include "localgp/design_set.hpp"
#include "localgp/errors.hpp"
#include "localgp/global.hpp"
#include "localgp/gp.hpp"
#include "localgp/kernel.hpp"
#include "localgp/knn.hpp"
#include "localgp/linalg.hpp"
#include "localgp/local.hpp"
#include "localgp/parallel.hpp"
#include "localgp/rng.hpp"
