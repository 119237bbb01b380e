#pragma once

#include "atoms.hpp"
#include "field_ops.hpp"
#include "flag_core.hpp"
#include "generators.hpp"
#include "grid.hpp"
#include "group.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "operators.hpp"
#include "report.hpp"
#include "scales.hpp"
#include "spectral.hpp"
#include "tiling.hpp"
#include "util.hpp"
