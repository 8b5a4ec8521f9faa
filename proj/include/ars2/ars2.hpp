#pragma once

// Umbrella header for the full pipeline: corpora and imbalance, labeling
// rules, label models, the MLP end model, ranking-based sample selection,
// and the experiment harness.

#include "ars2/corpus.hpp"
#include "ars2/end_model.hpp"
#include "ars2/harness.hpp"
#include "ars2/label_model.hpp"
#include "ars2/random.hpp"
#include "ars2/rules.hpp"
#include "ars2/selection.hpp"
