#pragma once

#include "lightray/errors.hpp"
#include "lightray/linalg.hpp"
#include "lightray/io.hpp"
#include "lightray/minkowski.hpp"
#include "lightray/connection.hpp"
#include "lightray/gauge.hpp"
#include "lightray/transport.hpp"
#include "lightray/parallel.hpp"
#include "lightray/broken_ray.hpp"
#include "lightray/interaction_geometry.hpp"
#include "lightray/wave_lab.hpp"
