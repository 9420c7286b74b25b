"""
URL configuration for macrates_project project.

The laboratory is driven from the command line; the only web surface is the
Django admin, where recorded simulation runs can be browsed.
"""
from django.contrib import admin
from django.urls import path

urlpatterns = [
    path("admin/", admin.site.urls),
]
