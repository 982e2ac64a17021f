#pragma once

// Umbrella header for the self-training annotation engine.

#include "selftrain/corpus.hpp"
#include "selftrain/error.hpp"
#include "selftrain/eval.hpp"
#include "selftrain/features.hpp"
#include "selftrain/hmm.hpp"
#include "selftrain/keyvalue.hpp"
#include "selftrain/label.hpp"
#include "selftrain/loop.hpp"
#include "selftrain/model_set.hpp"
#include "selftrain/run_config.hpp"
#include "selftrain/selector.hpp"
#include "selftrain/sweep.hpp"
#include "selftrain/synth.hpp"
