#pragma once

#include "spyro/common.hpp"
#include "spyro/config.hpp"
#include "spyro/density.hpp"
#include "spyro/estimation.hpp"
#include "spyro/grid_r3.hpp"
#include "spyro/grid_so3.hpp"
#include "spyro/healpix.hpp"
#include "spyro/inference.hpp"
#include "spyro/keypoints.hpp"
#include "spyro/mollweide.hpp"
#include "spyro/pyramid.hpp"
#include "spyro/quaternion.hpp"
#include "spyro/training.hpp"
