#pragma once

#include "fpforge/adam.hpp"
#include "fpforge/augment.hpp"
#include "fpforge/checkpoint.hpp"
#include "fpforge/config.hpp"
#include "fpforge/dataset.hpp"
#include "fpforge/detector.hpp"
#include "fpforge/error.hpp"
#include "fpforge/experiment.hpp"
#include "fpforge/extractor.hpp"
#include "fpforge/grad_check.hpp"
#include "fpforge/io.hpp"
#include "fpforge/metrics.hpp"
#include "fpforge/nn.hpp"
#include "fpforge/ops.hpp"
#include "fpforge/parallel.hpp"
#include "fpforge/rng.hpp"
#include "fpforge/spectrum.hpp"
#include "fpforge/synthgan.hpp"
#include "fpforge/tape.hpp"
#include "fpforge/tensor.hpp"
