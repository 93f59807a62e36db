#pragma once

#include "uraenas/errors.hpp"
#include "uraenas/rng.hpp"
#include "uraenas/tensor.hpp"
#include "uraenas/search_space.hpp"
#include "uraenas/arch_dist.hpp"
#include "uraenas/samplers.hpp"
#include "uraenas/data.hpp"
#include "uraenas/metrics.hpp"
#include "uraenas/trainer.hpp"
#include "uraenas/config.hpp"
#include "uraenas/persist.hpp"
#include "uraenas/pipeline.hpp"
