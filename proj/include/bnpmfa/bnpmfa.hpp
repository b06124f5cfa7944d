#pragma once

#include "bnpmfa/core.hpp"
#include "bnpmfa/gibbs_priors.hpp"
#include "bnpmfa/identifiability.hpp"
#include "bnpmfa/ingest.hpp"
#include "bnpmfa/metrics.hpp"
#include "bnpmfa/rng.hpp"
#include "bnpmfa/sampler.hpp"
#include "bnpmfa/serialize.hpp"
#include "bnpmfa/simulate.hpp"
#include "bnpmfa/summarize.hpp"
