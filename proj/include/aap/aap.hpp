#pragma once

// Umbrella header for the AI accountability platform library.

#include "aap/audit.hpp"
#include "aap/benchmark.hpp"
#include "aap/canonical.hpp"
#include "aap/clients.hpp"
#include "aap/common.hpp"
#include "aap/config.hpp"
#include "aap/csv.hpp"
#include "aap/fold_store.hpp"
#include "aap/hash.hpp"
#include "aap/measures.hpp"
#include "aap/ontology.hpp"
#include "aap/protocol.hpp"
#include "aap/registry.hpp"
#include "aap/rng.hpp"
#include "aap/stats.hpp"
#include "aap/store.hpp"
