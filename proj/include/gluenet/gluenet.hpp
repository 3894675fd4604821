#pragma once

#include "gluenet/autograd.hpp"
#include "gluenet/checkpoint.hpp"
#include "gluenet/config.hpp"
#include "gluenet/data.hpp"
#include "gluenet/diagnostics.hpp"
#include "gluenet/digest.hpp"
#include "gluenet/error.hpp"
#include "gluenet/fusion.hpp"
#include "gluenet/model.hpp"
#include "gluenet/objectives.hpp"
#include "gluenet/ops.hpp"
#include "gluenet/optim.hpp"
#include "gluenet/tensor.hpp"
#include "gluenet/train.hpp"
