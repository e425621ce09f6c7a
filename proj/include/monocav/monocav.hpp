#pragma once

#include "monocav/errors.hpp"
#include "monocav/geometry.hpp"
#include "monocav/ionic.hpp"
#include "monocav/sparse.hpp"
#include "monocav/diffusion.hpp"
#include "monocav/forward.hpp"
#include "monocav/nonlocal.hpp"
#include "monocav/measurements.hpp"
#include "monocav/nelder_mead.hpp"
#include "monocav/inverse.hpp"
#include "monocav/config.hpp"
