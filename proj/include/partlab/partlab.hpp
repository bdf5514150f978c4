#pragma once

#include "partlab/assembly.hpp"
#include "partlab/correspond.hpp"
#include "partlab/crf.hpp"
#include "partlab/eval.hpp"
#include "partlab/hypothesis.hpp"
#include "partlab/pipeline.hpp"
#include "partlab/scoring.hpp"
#include "partlab/synth.hpp"
#include "partlab/voxel.hpp"
