#pragma once

#include "pcc/aoa.hpp"
#include "pcc/clutter.hpp"
#include "pcc/dataset.hpp"
#include "pcc/dissim.hpp"
#include "pcc/eval.hpp"
#include "pcc/features.hpp"
#include "pcc/geometry.hpp"
#include "pcc/mlp.hpp"
#include "pcc/pccd_io.hpp"
#include "pcc/pipeline.hpp"
#include "pcc/simulator.hpp"
#include "pcc/train.hpp"
