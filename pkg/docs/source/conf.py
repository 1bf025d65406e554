# Sphinx configuration for the exogait docs.
import os
import sys

from packaging import version as version_

sys.path.insert(0, os.path.abspath("../.."))

import exogait  # noqa: E402

project = "exogait"
author = "exogait developers"
copyright = "2021, " + author

release = exogait.__version__
version = ".".join(map(str, version_.parse(release).release[:2]))

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.intersphinx",
    "sphinx.ext.viewcode",
]
autodoc_member_order = "bysource"
templates_path = ["_templates"]
source_suffix = ".rst"
master_doc = "index"
exclude_patterns = []

html_theme = "sphinx_rtd_theme"
htmlhelp_basename = "exogaitdoc"

man_pages = [(master_doc, "exogait", "exogait Documentation", [author], 1)]

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
}


def skip(app, what, name, obj, would_skip, options):
    # Constructors carry the parameter docs
    if name == "__init__":
        return False
    return would_skip


def setup(app):
    app.connect("autodoc-skip-member", skip)
