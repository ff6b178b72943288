#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# Sphinx configuration for the Hop simulator documentation.

import os
import re
import sys
import django

sys.path.insert(0, os.path.abspath("../"))
os.environ.setdefault("DJANGO_SETTINGS_MODULE", "hop_site.settings")
django.setup()

# Symlink CHANGELOG.md and README.md from repo root to the pages dir.
basedir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
filenames = ["CHANGELOG.md", "README.md"]
for filename in filenames:
    target = os.path.join(basedir, "docs", "pages", filename)
    if not os.path.islink(target):
        os.symlink(os.path.join(basedir, filename), target)


# -- General configuration ------------------------------------------------

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.intersphinx",
    "sphinx.ext.todo",
    "sphinx.ext.mathjax",
    "sphinx.ext.viewcode",
    "myst_parser",
]

myst_enable_extensions = [
    "colon_fence",
    "deflist",
    "dollarmath",
    "fieldlist",
]
myst_heading_anchors = 4

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "networkx": ("https://networkx.org/documentation/stable/", None),
}

templates_path = ["_templates"]

source_suffix = {
    ".rst": "restructuredtext",
    ".md": "markdown",
}

master_doc = "index"

project = "Hop Simulator"
copyright = "2026, Hop contributors"
author = "Hop contributors"

# Get version without importing
with open("../hop/__init__.py", "rb") as f:
    VERSION = str(re.search('__version__ = "(.+?)"', f.read().decode("utf-8")).group(1))
version = VERSION
release = VERSION

language = "en"

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]

pygments_style = "sphinx"

todo_include_todos = True

autodoc_member_order = "bysource"


# -- Options for HTML output ----------------------------------------------

html_theme = "alabaster"

html_static_path = ["_static"]

html_sidebars = {
    "**": [
        "about.html",
        "navigation.html",
        "relations.html",
        "searchbox.html",
    ]
}

htmlhelp_basename = "HopSimulatorDoc"


# -- Options for manual page output ---------------------------------------

man_pages = [(master_doc, "hopsim", "Hop Simulator Documentation", [author], 1)]
