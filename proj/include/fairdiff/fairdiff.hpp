#pragma once

#include "fairdiff/adam.hpp"
#include "fairdiff/audit.hpp"
#include "fairdiff/diffusion.hpp"
#include "fairdiff/digest.hpp"
#include "fairdiff/error.hpp"
#include "fairdiff/fair_guidance.hpp"
#include "fairdiff/ieat.hpp"
#include "fairdiff/io.hpp"
#include "fairdiff/metrics.hpp"
#include "fairdiff/mlp.hpp"
#include "fairdiff/pipeline.hpp"
#include "fairdiff/report.hpp"
#include "fairdiff/rng.hpp"
#include "fairdiff/tensor.hpp"
#include "fairdiff/world.hpp"
