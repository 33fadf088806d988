#pragma once

// LibTorch defines a logging CHECK macro; doctest's assertion macro replaces it here.
#include <torch/torch.h>
#undef CHECK
#include <doctest.h>
