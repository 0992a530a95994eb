#pragma once

#include "volret/error.hpp"
#include "volret/vector_ops.hpp"
#include "volret/file_io.hpp"
#include "volret/corpus.hpp"
#include "volret/synthetic.hpp"
#include "volret/hnsw.hpp"
#include "volret/ann_index.hpp"
#include "volret/retrieval.hpp"
#include "volret/parallel.hpp"
#include "volret/rerank.hpp"
#include "volret/experiments.hpp"
#include "volret/metrics.hpp"
#include "volret/pipeline.hpp"
#include "volret/run_config.hpp"
