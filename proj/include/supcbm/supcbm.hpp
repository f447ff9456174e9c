#pragma once

#include "supcbm/annotator.hpp"
#include "supcbm/cbm_core.hpp"
#include "supcbm/concept_vocabulary.hpp"
#include "supcbm/digest.hpp"
#include "supcbm/embedding_store.hpp"
#include "supcbm/error.hpp"
#include "supcbm/evaluator.hpp"
#include "supcbm/linalg.hpp"
#include "supcbm/service.hpp"
