#pragma once

// Umbrella header: the whole library in dependency order.

#include "icca/util.hpp"
#include "icca/image.hpp"
#include "icca/core.hpp"
#include "icca/promptkit.hpp"
#include "icca/stats.hpp"
#include "icca/metrics.hpp"
#include "icca/agents.hpp"
#include "icca/corpus.hpp"
#include "icca/engine.hpp"
#include "icca/report.hpp"
