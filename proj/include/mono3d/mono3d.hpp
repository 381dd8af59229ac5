#pragma once

#include "mono3d/assignment.hpp"
#include "mono3d/boxes.hpp"
#include "mono3d/encoding.hpp"
#include "mono3d/eval.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/iou.hpp"
#include "mono3d/kitti.hpp"
#include "mono3d/losses.hpp"
#include "mono3d/report.hpp"
#include "mono3d/synth.hpp"
