#pragma once

#include "ecll/bench.hpp"
#include "ecll/domain.hpp"
#include "ecll/edge_runtime.hpp"
#include "ecll/error.hpp"
#include "ecll/knowledge_base.hpp"
#include "ecll/learners.hpp"
#include "ecll/lifelong_job.hpp"
#include "ecll/orchestrator.hpp"
#include "ecll/rng.hpp"
#include "ecll/task_mining.hpp"
