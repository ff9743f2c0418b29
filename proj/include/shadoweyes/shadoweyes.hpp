#pragma once

#include "shadoweyes/common.hpp"
#include "shadoweyes/config.hpp"
#include "shadoweyes/txdata.hpp"
#include "shadoweyes/synthgen.hpp"
#include "shadoweyes/features.hpp"
#include "shadoweyes/nn.hpp"
#include "shadoweyes/structgae.hpp"
#include "shadoweyes/augment.hpp"
#include "shadoweyes/contrastive.hpp"
#include "shadoweyes/classify.hpp"
#include "shadoweyes/evalharness.hpp"
