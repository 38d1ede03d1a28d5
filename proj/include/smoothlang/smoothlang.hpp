#pragma once

#include "smoothlang/autodiff.hpp"
#include "smoothlang/gradcheck.hpp"
#include "smoothlang/interp.hpp"
#include "smoothlang/optim.hpp"
#include "smoothlang/smooth_ifs.hpp"
#include "smoothlang/smooth_ops.hpp"
#include "smoothlang/while_lang.hpp"
