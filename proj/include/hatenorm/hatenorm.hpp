#pragma once

// Everything except the HTTP layer (hatenorm/service.hpp), which pulls in
// httplib.

#include "hatenorm/bleu.hpp"
#include "hatenorm/corpus.hpp"
#include "hatenorm/crf.hpp"
#include "hatenorm/dictionary.hpp"
#include "hatenorm/error.hpp"
#include "hatenorm/evalx.hpp"
#include "hatenorm/generator.hpp"
#include "hatenorm/intensity.hpp"
#include "hatenorm/nn.hpp"
#include "hatenorm/pipeline.hpp"
#include "hatenorm/rewriter.hpp"
#include "hatenorm/rng.hpp"
#include "hatenorm/spanner.hpp"
#include "hatenorm/splice.hpp"
#include "hatenorm/stats.hpp"
#include "hatenorm/virality.hpp"
