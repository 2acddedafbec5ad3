#pragma once

#include "glab/adjoint.hpp"
#include "glab/cli.hpp"
#include "glab/config.hpp"
#include "glab/control_problem.hpp"
#include "glab/driver.hpp"
#include "glab/error.hpp"
#include "glab/expectation.hpp"
#include "glab/expression.hpp"
#include "glab/grid.hpp"
#include "glab/hamiltonian.hpp"
#include "glab/parallel.hpp"
#include "glab/problems.hpp"
#include "glab/regression.hpp"
#include "glab/report.hpp"
#include "glab/scenario.hpp"
#include "glab/verify.hpp"
