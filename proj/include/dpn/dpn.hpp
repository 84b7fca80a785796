#pragma once

#include "tensor.hpp"
#include "tensor_io.hpp"
#include "resize.hpp"
#include "mrf.hpp"
#include "meanfield.hpp"
#include "layers.hpp"
#include "learning.hpp"
#include "synthetic.hpp"
#include "metrics.hpp"
