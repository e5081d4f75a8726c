#pragma once

#include "alft/analysis.hpp"
#include "alft/attribution.hpp"
#include "alft/error.hpp"
#include "alft/instrument.hpp"
#include "alft/model.hpp"
#include "alft/ops.hpp"
#include "alft/report.hpp"
#include "alft/serialize.hpp"
#include "alft/squad.hpp"
#include "alft/tensor.hpp"
#include "alft/tokenizer.hpp"
#include "alft/trace.hpp"
#include "alft/train.hpp"
