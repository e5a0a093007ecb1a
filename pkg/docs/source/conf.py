# -- General configuration -----------------------------------------------

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.doctest',
    'sphinx.ext.intersphinx',
]

release = "0.1.1"

# Add any paths that contain templates here, relative to this directory.
templates_path = ['_templates']

# The suffix of source filenames.
source_suffix = '.rst'

# The master toctree document.
master_doc = 'index'

# General information about the project.
project = 'ips_cftp'
copyright = '2026, ips_cftp developers'

exclude_patterns = []

pygments_style = 'sphinx'


# -- Options for HTML output ---------------------------------------------

html_theme = 'sphinxdoc'

html_static_path = ['_static']

htmlhelp_basename = 'ips-cftp-pydoc'


intersphinx_mapping = {
    'http://docs.python.org/': None
}
