#pragma once

#include "rosita/corpus.hpp"
#include "rosita/embeddings.hpp"
#include "rosita/entries.hpp"
#include "rosita/error.hpp"
#include "rosita/graph.hpp"
#include "rosita/knowledge.hpp"
#include "rosita/matrix.hpp"
#include "rosita/model.hpp"
#include "rosita/objectives.hpp"
#include "rosita/rng.hpp"
#include "rosita/scene_parser.hpp"
#include "rosita/skm.hpp"
#include "rosita/synthetic.hpp"
#include "rosita/trainer.hpp"
