#pragma once

#include "tkfnet/errors.hpp"
#include "tkfnet/tensor.hpp"
#include "tkfnet/ops.hpp"
#include "tkfnet/grad_check.hpp"
#include "tkfnet/random.hpp"
#include "tkfnet/parallel.hpp"
#include "tkfnet/layers.hpp"
#include "tkfnet/backbone.hpp"
#include "tkfnet/tafe.hpp"
#include "tkfnet/dcif.hpp"
#include "tkfnet/model.hpp"
#include "tkfnet/serialize.hpp"
#include "tkfnet/data.hpp"
#include "tkfnet/train.hpp"
#include "tkfnet/verify.hpp"
#include "tkfnet/cli.hpp"
