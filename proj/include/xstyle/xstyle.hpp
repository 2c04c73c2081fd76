#pragma once

// Umbrella header.

#include "xstyle/assets.hpp"
#include "xstyle/common.hpp"
#include "xstyle/image.hpp"
#include "xstyle/losses.hpp"
#include "xstyle/nn.hpp"
#include "xstyle/stylizer.hpp"
#include "xstyle/tensor.hpp"
#include "xstyle/training.hpp"
#include "xstyle/transformer.hpp"
#include "xstyle/vgg.hpp"
