#pragma once

#include "nabla/errors.hpp"
#include "nabla/expr.hpp"
#include "nabla/grid.hpp"
#include "nabla/random.hpp"
#include "nabla/geometry.hpp"
#include "nabla/bundle.hpp"
#include "nabla/section.hpp"
#include "nabla/connection.hpp"
#include "nabla/norms.hpp"
#include "nabla/generators.hpp"
#include "nabla/operators.hpp"
#include "nabla/bidiff.hpp"
#include "nabla/checks.hpp"
#include "nabla/scenario.hpp"
#include "nabla/builtins.hpp"
