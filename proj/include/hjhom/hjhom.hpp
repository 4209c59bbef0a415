#pragma once

// Everything at once.

#include "hjhom/error.hpp"
#include "hjhom/torus_field.hpp"
#include "hjhom/potential.hpp"
#include "hjhom/cell.hpp"
#include "hjhom/legendre.hpp"
#include "hjhom/hopflax.hpp"
#include "hjhom/viscous_kernel.hpp"
#include "hjhom/bloch.hpp"
#include "hjhom/harness.hpp"
