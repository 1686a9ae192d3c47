#pragma once

#include "errors.hpp"
#include "numerics.hpp"
#include "core.hpp"
#include "em.hpp"
#include "contraction.hpp"
#include "simlab.hpp"
#include "evalkit.hpp"
#include "io.hpp"
