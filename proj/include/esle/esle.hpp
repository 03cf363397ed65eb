#pragma once

// Umbrella header: pulls in the whole toolkit.

#include "esle/corpus.hpp"
#include "esle/embedding.hpp"
#include "esle/error.hpp"
#include "esle/geo.hpp"
#include "esle/io.hpp"
#include "esle/labels.hpp"
#include "esle/metrics.hpp"
#include "esle/nnet.hpp"
#include "esle/pipeline.hpp"
#include "esle/portseek.hpp"
#include "esle/rng.hpp"
#include "esle/semantic.hpp"
#include "esle/tensor.hpp"
