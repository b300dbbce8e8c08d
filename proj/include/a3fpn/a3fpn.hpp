#pragma once

#include "a3fpn/autodiff.hpp"
#include "a3fpn/common.hpp"
#include "a3fpn/config.hpp"
#include "a3fpn/fusion.hpp"
#include "a3fpn/gradcheck.hpp"
#include "a3fpn/heatmap.hpp"
#include "a3fpn/icatten.hpp"
#include "a3fpn/infoflow.hpp"
#include "a3fpn/ops.hpp"
#include "a3fpn/params.hpp"
#include "a3fpn/plan.hpp"
#include "a3fpn/pyramid.hpp"
#include "a3fpn/sampling.hpp"
#include "a3fpn/tensor.hpp"
#include "a3fpn/weights.hpp"
