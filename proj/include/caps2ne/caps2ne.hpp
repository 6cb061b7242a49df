#pragma once

#include "caps2ne/adam.hpp"
#include "caps2ne/capsule.hpp"
#include "caps2ne/config.hpp"
#include "caps2ne/embedding_io.hpp"
#include "caps2ne/eval.hpp"
#include "caps2ne/graph.hpp"
#include "caps2ne/inductive.hpp"
#include "caps2ne/loss.hpp"
#include "caps2ne/trainer.hpp"
#include "caps2ne/walks.hpp"
