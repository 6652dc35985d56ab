#pragma once

#include "fpn/common.hpp"
#include "fpn/config.hpp"
#include "fpn/filter.hpp"
#include "fpn/geometry.hpp"
#include "fpn/ground_truth.hpp"
#include "fpn/heightmap.hpp"
#include "fpn/io.hpp"
#include "fpn/mesh.hpp"
#include "fpn/metrics.hpp"
#include "fpn/nnet/checkpoint.hpp"
#include "fpn/normal_estimator.hpp"
