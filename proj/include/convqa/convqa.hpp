#pragma once

#include "convqa/analytics.hpp"
#include "convqa/coref.hpp"
#include "convqa/corpus.hpp"
#include "convqa/error.hpp"
#include "convqa/humaneval.hpp"
#include "convqa/humaneval_http.hpp"
#include "convqa/model.hpp"
#include "convqa/protocol.hpp"
#include "convqa/report.hpp"
#include "convqa/rewrite.hpp"
#include "convqa/rule_resolver.hpp"
#include "convqa/scoring.hpp"
#include "convqa/text.hpp"
#include "convqa/transport.hpp"
