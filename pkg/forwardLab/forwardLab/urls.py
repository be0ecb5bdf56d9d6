"""
URL configuration for the forwardLab project.

The admin lists recorded training runs; everything else is served by the REST API under ``api/v1/``.
"""
from django.contrib import admin
from django.urls import path, include


urlpatterns = [
    path('admin/', admin.site.urls),
    path('', include('API.urls')),
]
